//! Full-scale acceptance run: one pass/fail line per criterion.

use std::io::Write;
use std::time::Instant;

use peel_lab_cli::checks::{self, Check, Context};
use peel_lab_cli::config::RunConfig;

type Step = fn(&Context) -> anyhow::Result<Vec<Check>>;

#[test]
fn acceptance() {
    let ctx = Context::new(&RunConfig::default()).expect("quadrangulation tables");
    let steps: [(u8, Step); 10] = [
        (1, checks::criterion_1),
        (2, checks::criterion_2),
        (3, checks::criterion_3),
        (4, checks::criterion_4),
        (5, checks::criterion_5),
        (6, checks::criterion_6),
        (7, checks::criterion_7),
        (8, checks::criterion_8),
        (9, checks::criterion_9),
        (10, checks::criterion_10),
    ];
    let mut failed = Vec::new();
    for (c, f) in steps {
        let start = Instant::now();
        let (pass, detail) = match f(&ctx) {
            Ok(found) => {
                let bad: Vec<String> = found
                    .iter()
                    .filter(|x| !x.pass)
                    .map(|x| format!("{}: {} (target {}, tol {})", x.check, x.value, x.target, x.tolerance))
                    .collect();
                let summary = if bad.is_empty() {
                    found.iter().map(|x| format!("{} = {}", x.check, x.value)).collect::<Vec<_>>().join("; ")
                } else {
                    bad.join("; ")
                };
                (bad.is_empty(), summary)
            }
            Err(e) => (false, format!("error: {e:#}")),
        };
        // written to the handle directly so the lines survive output capture
        writeln!(
            std::io::stdout().lock(),
            "criterion {c:>2}: {} [{:.0} s] {detail}",
            if pass { "PASS" } else { "FAIL" },
            start.elapsed().as_secs_f64()
        )
        .unwrap();
        if !pass {
            failed.push(c);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
