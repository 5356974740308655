//! Prints per-system transfer statistics for every candidate pool in a
//! built pipeline directory: how often pool members flip each zoo member,
//! and how concentrated that ability is. Useful when sizing perturbation
//! budgets, since selection only has room to work when transfer is rare but
//! not absent.
//!
//! Usage: pool_transfer <pipeline-out-dir>

use robsuite::artifact;
use robsuite::config::Config;
use robsuite::generate;
use robsuite::optimize::FailureMatrix;
use robsuite::pipeline::{generation_pairs, load_zoo, Layout};
use robsuite::siamese::Meter;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let root = std::env::args()
        .nth(1)
        .ok_or("usage: pool_transfer <pipeline-out-dir>")?;
    let layout = Layout::new(std::path::Path::new(&root));
    let cfg: Config = artifact::read_json(&layout.resolved_config())?;
    let (_, _, pairs) = generation_pairs(&layout)?;
    let zoo = load_zoo(&layout)?;
    let systems: Vec<_> = zoo.members.iter().map(|m| &m.member.system).collect();
    let meter = Meter::new();

    for section in &cfg.schemes {
        let pool = generate::load_pool(&layout.pool_dir(&section.name))?;
        let matrix = FailureMatrix::build(&pool, &systems, &pairs, &meter)?;
        let all = vec![u64::MAX; pool.candidates.len().div_ceil(64)];
        let counts = matrix.selected_counts(&all);
        println!(
            "{} pool {} candidates over {} pairs",
            section.name,
            pool.candidates.len(),
            pool.pair_count
        );
        for (mi, m) in zoo.members.iter().enumerate() {
            let rate = counts[mi] as f64 / pool.candidates.len() as f64;
            println!(
                "  {:14} {:>7} flips  rate {:.4}  [{:?}]",
                m.name, counts[mi], rate, m.role
            );
        }
        // Universality: how many systems each candidate flips at once.
        let mut by_breadth = vec![0usize; systems.len() + 1];
        for ci in 0..pool.candidates.len() {
            let breadth = (0..systems.len())
                .filter(|&s| matrix.misclassified(s, ci))
                .count();
            by_breadth[breadth] += 1;
        }
        let summary: Vec<String> = by_breadth
            .iter()
            .enumerate()
            .filter(|(_, &n)| n > 0)
            .map(|(b, &n)| format!("{b}:{n}"))
            .collect();
        println!("  breadth histogram {}", summary.join(" "));
    }
    Ok(())
}
