//! Baseline against the attention model with shared initial weights and
//! identical data, then a loss ablation. The default budget is small; pass
//! `full` to use the complete 2000-step, 3-seed comparison.

use gca_matting::train::{ablation_table, comparison_table, run_ablation, run_comparison, ComparisonConfig, LossFlags};

fn main() -> gca_matting::Result<()> {
    let full = std::env::args().nth(1).as_deref() == Some("full");
    let mut cfg = ComparisonConfig::default();
    if !full {
        cfg.seeds = vec![0];
        cfg.eval_count = 8;
        cfg.train.total_steps = 150;
    }
    let cmp = run_comparison(&cfg, |r| {
        println!("{} seed {} done: MSE {:.4}", if r.use_gca { "GCA" } else { "Baseline" }, r.seed, r.metrics.mse);
    })?;
    println!("{}", comparison_table(&cmp));
    println!("median MSE trend (attention ≤ baseline): {}", cmp.trend_holds());

    let rec = LossFlags::default();
    let all = LossFlags { rec: true, comp: true, gradl: true };
    let rows = run_ablation(&cfg, &[(false, rec), (true, rec), (true, all)], 0)?;
    println!("{}", ablation_table(&rows));
    Ok(())
}
