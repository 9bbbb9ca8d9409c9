//! Drives a verification command through the configuration layer, the same
//! path the `leno` binary takes.

use leno::harness::{run, Command, Config};

fn main() -> leno::Result<()> {
    let cfg = Config::parse(
        "# a quick rank sweep\n\
         rank.cells = 128\n\
         rank.n_ref = 128\n\
         rank.ranks = 4, 8, 16, 32\n",
    )?;
    println!("config hash {}", cfg.hash());
    let out = std::env::temp_dir().join("leno-harness-example");
    let outcome = run(Command::VerifyRank, &cfg, &out)?;
    for line in &outcome.summary {
        println!("{line}");
    }
    for f in &outcome.files {
        println!("wrote {}", f.display());
    }
    println!("verdict: {}", if outcome.pass { "pass" } else { "fail" });
    Ok(())
}
