//! Runs the synthetic desk-scale experiment and prints a summary.
//!
//! cargo run --release -p pkws-core --example desk -- [seed] [noise level] [speaker reuse]

use std::time::Instant;

use pkws::exec::Exec;
use pkws::system::{run_experiment, summary_text, ExperimentConfig};

fn main() {
    let seed = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(0);
    let mut cfg = ExperimentConfig::desk(seed);
    let arg = |i: usize| std::env::args().nth(i).and_then(|s| s.parse::<f64>().ok());
    if let Some(noise) = arg(2) {
        cfg.data.noise_level = noise;
    }
    if let Some(reuse) = arg(3) {
        cfg.speaker_reuse = reuse;
    }
    let start = Instant::now();
    match run_experiment(&cfg, Exec::Parallel) {
        Ok(r) => {
            for e in &r.train_log.epochs {
                println!(
                    "epoch {:2} loss {:.4} lk {:.4} ls {:.4} acc {:?} sv-eer {:?}",
                    e.epoch, e.loss, e.keyword_loss, e.speaker_loss, e.val_keyword_accuracy, e.val_speaker_eer
                );
            }
            let last = |l: &pkws::adapt::TrmTrainLog| l.epochs.last().map(|e| (e.loss, e.val_eer));
            println!("trm tb {:?} best {}", last(&r.trm_tb_log), r.trm_tb_log.best_epoch);
            println!("trm to {:?} best {}", last(&r.trm_to_log), r.trm_to_log.best_epoch);
            print!("{}", summary_text(&r));
            println!("elapsed {:.1}s", start.elapsed().as_secs_f64());
        }
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(1);
        }
    }
}
