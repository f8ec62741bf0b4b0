//! Wall time of training epochs for the default scalar Burgers model on a
//! 16x16 grid: `cargo run --release --example train_step_timing`.

use std::time::Instant;

use gns_core::datagen::{generate_dataset, CaseSpec, GridSpec, PdeCase};
use gns_core::model::GnsConfig;
use gns_core::training::{init_training, resume_training, TrainConfig};

fn main() -> gns_core::Result<()> {
    let mut spec = CaseSpec::standard(PdeCase::BurgersScalar);
    spec.grid = GridSpec::new(16, 16);
    let ds = generate_dataset(&spec, 2, 0)?;
    let ids = [0, 1];
    let cfg = TrainConfig {
        epochs: 1,
        ..TrainConfig::for_case(PdeCase::BurgersScalar)
    };
    let state = init_training(&ds, &ids, &cfg, &GnsConfig::for_case(PdeCase::BurgersScalar))?;
    let steps = ids.len() * (ds.trajectories[0].n_snapshots() - 1) / cfg.batch_size;
    let start = Instant::now();
    resume_training(&ds, &ids, state, &mut |_| Ok(()))?;
    let secs = start.elapsed().as_secs_f64();
    println!("{steps} steps in {secs:.2} s: {:.3} s/step", secs / steps as f64);
    Ok(())
}
