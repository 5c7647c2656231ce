//! One line per acceptance criterion at desk scale. `HAMRED_SCALE` selects another scale.

use std::time::Instant;

use hamred_core::checks::{Scale, Status, Suite};

fn main() {
    let scale = match std::env::var("HAMRED_SCALE") {
        Ok(s) => s.parse().unwrap_or_else(|e| panic!("{e}")),
        Err(_) => Scale::Desk,
    };
    let suite = Suite::new(scale);
    let clock = Instant::now();
    let mut failed = 0;
    for id in 1..=10 {
        let out = suite.run(id);
        if out.status == Status::Fail {
            failed += 1;
        }
        println!("{}", out.line());
    }
    println!(
        "acceptance at {scale} scale: {} of 10 criteria failed, {:.1} s",
        failed,
        clock.elapsed().as_secs_f64()
    );
}
