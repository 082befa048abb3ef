//! Writes a synthetic series to CSV.
//!
//! ```text
//! cargo run --release -p probcast --example simulate -- ar1 5000 0 data/ar1.csv
//! cargo run --release -p probcast --example simulate -- hetero 5000 0 data/hetero.csv
//! cargo run --release -p probcast --example simulate -- multi 3000 0 data/multi.csv
//! ```

use probcast::dataset::write_csv;
use probcast::synthetic::{multivariate_fixture, GaussianAr};

fn main() {
    let args: Vec<String> = std::env::args().skip(1).collect();
    if args.len() != 4 {
        eprintln!("usage: simulate <ar1|hetero|multi> <rows> <seed> <out.csv>");
        std::process::exit(2);
    }
    let rows: usize = args[1].parse().expect("rows");
    let seed: u64 = args[2].parse().expect("seed");
    let frame = match args[0].as_str() {
        "ar1" => GaussianAr::ar1(0.8, 0.5).simulate(rows, seed),
        "hetero" => GaussianAr::heteroscedastic(0.3, 0.05, 0.7).simulate(rows, seed),
        "multi" => multivariate_fixture(rows, 3, seed),
        other => {
            eprintln!("unknown series {other:?}");
            std::process::exit(2);
        }
    };
    if let Some(dir) = std::path::Path::new(&args[3]).parent() {
        std::fs::create_dir_all(dir).expect("output directory");
    }
    write_csv(&frame, &args[3]).expect("write");
}
