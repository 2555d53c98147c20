//! Runs the synthetic benchmark over a range of seeds and prints a summary.
//!
//! `cargo run --release -p domexp-core --example benchmark -- [seeds] [config.json]`

use domexp_core::fusion::{accuracy, format_table, FusionMethod};
use domexp_core::pipeline::{run_benchmark, BenchmarkConfig};
use domexp_core::PredictionBatch;

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

fn main() -> domexp_core::Result<()> {
    let mut args = std::env::args().skip(1);
    let seeds: u64 = args.next().map_or(3, |s| s.parse().expect("seed count"));
    let base: BenchmarkConfig = match args.next() {
        Some(path) => serde_json::from_str(&std::fs::read_to_string(path)?)?,
        None => BenchmarkConfig::default(),
    };
    let (mut wins, mut gains, mut drops, mut inverse) = (0, Vec::new(), Vec::new(), 0);
    for seed in 0..seeds {
        let start = std::time::Instant::now();
        let out = run_benchmark(&base.clone().with_seed(seed))?;
        let totals = out.expansion.round_totals();
        let new_test = &out.new_domain().test;
        let updated_acc = out
            .expansion
            .ensemble
            .updated()
            .iter()
            .map(|m| {
                let pred = PredictionBatch::from_scores(m.logits(new_test.features().view())?);
                accuracy(&pred, new_test.labels().expect("labelled"))
            })
            .collect::<domexp_core::Result<Vec<_>>>()?;
        let weights = out
            .expansion
            .weights
            .first()
            .map(|w| w.weights.clone())
            .unwrap_or_default();
        println!(
            "seed {seed} ({:.1}s): pretrain acc {:.3?}",
            start.elapsed().as_secs_f64(),
            out.pretrain_reports
                .iter()
                .map(|r| r.train_accuracy)
                .collect::<Vec<_>>()
        );
        println!(
            "  on new: originals {:.3?} updated {updated_acc:.3?} weights {weights:.3?}",
            out.original_new_domain_accuracy
        );
        println!(
            "  loss totals first {:.5} last {:.5}",
            totals.first().copied().unwrap_or(0.0),
            totals.last().copied().unwrap_or(0.0)
        );
        print!("{}", format_table(&out.reports));

        let b = out.report(FusionMethod::Baseline);
        let m1 = out.report(FusionMethod::M1);
        let m2 = out.report(FusionMethod::M2);
        if m1.expanded_accuracy > b.expanded_accuracy {
            wins += 1;
        }
        gains.push(m1.per_domain_accuracy["new"] - b.per_domain_accuracy["new"]);
        let drop = b
            .per_domain_accuracy
            .iter()
            .filter(|(k, _)| k.as_str() != "new")
            .map(|(k, v)| v - m2.per_domain_accuracy[k])
            .fold(f64::NEG_INFINITY, f64::max);
        drops.push(drop);
        let acc = &out.original_new_domain_accuracy;
        let n = acc.len();
        let ok = (0..n)
            .all(|a| (0..n).all(|c| a == c || (acc[a] < acc[c]) == (weights[a] > weights[c])));
        if ok {
            inverse += 1;
        }
    }
    println!(
        "summary: M1>base in {wins}/{seeds}; median new gain {:+.4}; median max M2 source drop {:+.4}; inverse ranking {inverse}/{seeds}",
        median(gains),
        median(drops)
    );
    Ok(())
}
