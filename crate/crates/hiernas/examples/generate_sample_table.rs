//! Regenerates the bundled synthetic cell table at data/nasbench_sample.jsonl.
//! The output is fully deterministic; rerunning produces an identical file.

use hiernas::evaluation::sample::sample_table_jsonl;

fn main() {
    let out = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "crates/hiernas/data/nasbench_sample.jsonl".to_string());
    let text = sample_table_jsonl(500, 0);
    std::fs::write(&out, text).expect("write table");
    println!("wrote 500 cells to {out}");
}
