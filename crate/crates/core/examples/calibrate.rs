//! Runs the transfer experiment on a synthetic spec and prints the summary.
//!
//! cargo run --release -p tmascore --example calibrate -- [spec.json] [runs]

use std::path::Path;

use tmascore::synthgen::{generate_corpus, SynthSpec};
use tmascore::transfer::{run_experiment, SplitOptions, TransferConfig};
use tmascore::FeatureOptions;

fn main() -> tmascore::Result<()> {
    let args: Vec<String> = std::env::args().collect();
    let spec = match args.get(1) {
        Some(p) if p != "-" => SynthSpec::load(Path::new(p))?,
        _ => SynthSpec::benchmark(),
    };
    let runs: usize = args.get(2).and_then(|r| r.parse().ok()).unwrap_or(20);
    let t0 = std::time::Instant::now();
    let corpus = generate_corpus(&spec)?;
    let (primary, aux) = corpus.features(&FeatureOptions::default())?;
    let config = TransferConfig {
        pooled_baseline: true,
        ..TransferConfig::default()
    };
    let report = run_experiment(&primary, &aux, &config, &SplitOptions::default(), runs)?;
    let (mut w, mut l, mut pw, mut pl, mut rw) = (0, 0, 0, 0, 0);
    for r in &report.run_records {
        if r.accuracy_with_transfer > r.accuracy_without_transfer {
            w += 1
        } else if r.accuracy_with_transfer < r.accuracy_without_transfer {
            l += 1
        }
        let pooled = r.accuracy_pooled.unwrap();
        if pooled < r.accuracy_without_transfer {
            pw += 1
        } else if pooled > r.accuracy_without_transfer {
            pl += 1
        }
        if r.rho_after < r.rho_before {
            rw += 1
        }
    }
    println!("no transfer   {:.4} +- {:.4}", report.accuracy_without_transfer.mean, report.accuracy_without_transfer.std);
    println!("with transfer {:.4} +- {:.4}  wins {w} losses {l}", report.accuracy_with_transfer.mean, report.accuracy_with_transfer.std);
    let pooled = report.accuracy_pooled.unwrap();
    println!("pooled        {:.4} +- {:.4}  below {pw} above {pl}", pooled.mean, pooled.std);
    println!("transferred   {:.1}  per source {:?}", report.mean_transferred, report.sources.iter().map(|s| s.mean_transferred).collect::<Vec<_>>());
    println!("rho before {:?} after {:?} (lower in {rw}/{})", report.rho_before, report.rho_after, report.runs);
    let pt = tmascore::evaluation::sign_test(w, l);
    let pp = tmascore::evaluation::sign_test(pw, pl);
    println!("p transfer {pt:.4} p pooled {pp:.4}");
    println!("elapsed {:.1?}", t0.elapsed());
    Ok(())
}
