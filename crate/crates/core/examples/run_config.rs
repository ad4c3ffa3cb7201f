//! Parsing a flat run configuration and its order-independent digest.

use epir::config::RunConfig;

fn main() -> epir::Result<()> {
    let text = "# a short run\nlearning_rate = 5e-4\nepochs = 40\nmodel_dim = 64\n";
    let cfg = RunConfig::parse(text)?;
    println!("lr {} epochs {} d {} heads {} (head width {})", cfg.train.adam.lr, cfg.train.epochs, cfg.model.dnspt.model_dim, cfg.model.heads, cfg.model.head_dim());

    let reordered = RunConfig::parse("model_dim=64\nepochs=40\nlearning_rate=0.0005\nheads=3\n")?;
    println!("hash {}", cfg.hash());
    println!("same after reordering: {}", cfg.hash() == reordered.hash());

    match RunConfig::parse("epochs = 40\npatch_sz = 7\n") {
        Err(e) => println!("rejected: {e}"),
        Ok(_) => unreachable!(),
    }
    match RunConfig::parse("patch_size = 5\n") {
        Err(e) => println!("rejected: {e}"),
        Ok(_) => unreachable!(),
    }
    Ok(())
}
