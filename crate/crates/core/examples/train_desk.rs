//! Desk-scale training run on synthetic phantoms.
//!
//! ```text
//! cargo run --release --example train_desk -- [loss] [epochs] [cases] [size]
//! ```
//!
//! Defaults: `dsf 30 20 32`. Prints per-epoch validation Dice and the
//! held-out metrics of the final network.

use canvolve::model::ModelConfig;
use canvolve::trainer::{evaluate, LossKind, LossSettings, TrainConfig, Trainer};
use canvolve::volio::{synth_phantom, Case, Dataset};

fn main() -> canvolve::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let threads = canvolve::threads::configure_threads()?;
    let args: Vec<String> = std::env::args().skip(1).collect();
    let arg = |i: usize, default: &str| args.get(i).cloned().unwrap_or_else(|| default.to_string());
    let kind: LossKind = arg(0, "dsf").parse()?;
    let epochs: u64 = arg(1, "30").parse().expect("epochs");
    let cases: usize = arg(2, "20").parse().expect("cases");
    let size: usize = arg(3, "32").parse().expect("size");

    let dataset = Dataset {
        cases: (0..cases)
            .map(|i| {
                let (volume, labels) = synth_phantom(1000 + i as u64, [size; 3], [1.0; 3], 3)?;
                Ok(Case {
                    id: format!("phantom_{i:02}"),
                    volume,
                    labels,
                })
            })
            .collect::<canvolve::Result<_>>()?,
    };
    let config = TrainConfig {
        model: ModelConfig {
            num_classes: 3,
            ..ModelConfig::default()
        },
        loss: LossSettings {
            kind,
            ..LossSettings::default()
        },
        epochs,
        seed: 7,
        ..TrainConfig::default()
    };
    println!("training {kind} for {epochs} epochs on {cases} phantoms of {size}³ ({threads} threads)");
    let start = std::time::Instant::now();
    let mut trainer = Trainer::<f32>::new(config, &dataset)?;
    trainer.run_to_end()?;
    let held_out = Dataset {
        cases: trainer.split().val.iter().map(|&i| dataset.cases[i].clone()).collect(),
    };
    let report = evaluate(trainer.network(), &held_out)?;
    for s in report.summary() {
        println!(
            "class {}: DSC {}  MSD {}  HD {}",
            s.class,
            s.dsc.map_or("NA".into(), |v| v.to_string()),
            s.msd_mm.map_or("NA".into(), |v| v.to_string()),
            s.hd_mm.map_or("NA".into(), |v| v.to_string()),
        );
    }
    println!("elapsed {:.1} s", start.elapsed().as_secs_f64());
    Ok(())
}
