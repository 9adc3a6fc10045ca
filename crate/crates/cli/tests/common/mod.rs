//! Fixtures shared by the CLI test targets.
#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Two user clusters, each interacting only with its own half of the
/// catalog. Within a cluster, item `j` (0-based rank) is drawn with weight
/// `1 / (j + 1)`, without replacement.
pub struct BlockDataset {
    pub users: usize,
    pub items: usize,
    pub per_user: usize,
    pub seed: u64,
}

impl Default for BlockDataset {
    fn default() -> Self {
        BlockDataset {
            users: 200,
            items: 100,
            per_user: 20,
            seed: 7,
        }
    }
}

impl BlockDataset {
    pub fn triples(&self) -> Vec<(usize, usize, u32)> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let half = self.items / 2;
        let ranks: Vec<usize> = (0..half).collect();
        let mut out = Vec::new();
        for u in 0..self.users {
            let cluster = usize::from(u >= self.users / 2);
            let chosen = ranks
                .choose_multiple_weighted(&mut rng, self.per_user, |&j| 1.0 / (j + 1) as f64)
                .expect("positive weights");
            let mut items: Vec<usize> = chosen.map(|&j| cluster * half + j).collect();
            items.sort_unstable();
            for i in items {
                out.push((u, i, rng.random_range(4..=5)));
            }
        }
        out
    }

    pub fn tsv(&self) -> String {
        let mut text = String::new();
        for (u, i, r) in self.triples() {
            writeln!(text, "u{u}\tp{i}\t{r}").unwrap();
        }
        text
    }
}

/// Writes `market.tsv` files and a run config into `dir`; returns the
/// config path.
pub fn write_run(dir: &Path, target: &str, markets: &[(&str, String)], extra: &str) -> PathBuf {
    let mut data = String::from("[data]\n");
    let mut sources = Vec::new();
    for (market, text) in markets {
        let file = format!("{market}.tsv");
        std::fs::write(dir.join(&file), text).unwrap();
        writeln!(data, "{market} = \"{file}\"").unwrap();
        if *market != target {
            sources.push(format!("\"{market}\""));
        }
    }
    let config = format!(
        "name = \"run\"\ntarget = \"{target}\"\nsources = [{}]\nseed = 0\nout = \"runs\"\n{extra}\n{data}",
        sources.join(", ")
    );
    let path = dir.join("run.toml");
    std::fs::write(&path, config).unwrap();
    path
}

/// Runs the CLI in-process, returning (exit code, stdout, stderr).
pub fn cli(args: &[&str]) -> (i32, String, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let argv = std::iter::once("crossgr").chain(args.iter().copied());
    let code = crossgr_cli::main_with_args(argv, &mut out, &mut err);
    (
        code,
        String::from_utf8(out).unwrap(),
        String::from_utf8(err).unwrap(),
    )
}
